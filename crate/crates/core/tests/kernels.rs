use ddc_core::kernels::{certify_kernel, KernelFamily, KernelSpec};

#[test]
fn every_family_integrates_to_one_with_vanishing_moments() {
    let mut specs = vec![KernelSpec::gaussian(1), KernelSpec::gaussian(2), KernelSpec::gaussian_product(2)];
    for order in [2, 4, 6, 8, 10] {
        specs.push(KernelSpec::high_order(order, 1).unwrap());
        specs.push(KernelSpec::high_order(order, 2).unwrap());
    }
    specs.push(KernelSpec::high_order(4, 3).unwrap());
    for (i, spec) in specs.iter().enumerate() {
        let c = certify_kernel(spec, 100, i as u64).unwrap();
        println!("{:?} dim {} order {}: {c:?}", spec.family(), spec.dim(), spec.order());
        assert!(c.mass_error <= 1e-6);
        assert!(c.max_moment <= 1e-6);
        assert!(c.max_gradient_error <= 1e-6);
    }
}

#[test]
fn odd_orders_and_unknown_names_are_rejected() {
    assert!(KernelSpec::high_order(3, 1).is_err());
    assert!(KernelSpec::high_order(12, 1).is_err());
    assert!(KernelFamily::parse("epanechnikov", 2).is_err());
    assert_eq!(KernelFamily::parse("high_order_product", 6).unwrap(), KernelFamily::HighOrderProduct(6));
}

#[test]
fn order_four_has_nonzero_fourth_moment() {
    // the first moment that does not vanish is the one at the kernel order
    let k = KernelSpec::high_order(4, 1).unwrap();
    let m4: f64 = (0..=2400).map(|i| -12.0 + 0.01 * i as f64).map(|u| 0.01 * u.powi(4) * k.k1(u)).sum();
    assert!((m4 + 3.0).abs() < 1e-8, "{m4}");
}
